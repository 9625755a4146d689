fn main() {
    std::process::exit(seqtrain::cli::main_with_args(std::env::args_os()));
}
