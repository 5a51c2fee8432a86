fn main() {
    std::process::exit(phonox::cli::main_with_args(std::env::args_os()));
}
