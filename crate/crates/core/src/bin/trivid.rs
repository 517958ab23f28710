fn main() {
    std::process::exit(trivid::cli::main_with_args(std::env::args_os()));
}
