fn main() {
    std::process::exit(dialvar::cli::main_from(std::env::args_os()));
}
