fn main() {
    std::process::exit(cafm::cli::main_with_args(std::env::args_os()));
}
