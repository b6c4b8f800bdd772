fn main() {
    std::process::exit(changeplane::cli::main_with_args(std::env::args_os()));
}
