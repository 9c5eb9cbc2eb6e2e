fn main() {
    std::process::exit(condflow::cli::main_with_args(std::env::args_os()));
}
