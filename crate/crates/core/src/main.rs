fn main() {
    std::process::exit(trimask::cli::main_with_args(std::env::args_os()));
}
