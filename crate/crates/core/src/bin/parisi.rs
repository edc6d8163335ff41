fn main() {
    std::process::exit(parisi::cli::main_with_args(std::env::args_os()));
}
