fn main() {
    std::process::exit(codecurate::cli::main_with_args(std::env::args_os()));
}
