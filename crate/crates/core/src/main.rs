fn main() {
    std::process::exit(ialm::cli::main_with_args(std::env::args_os()));
}
