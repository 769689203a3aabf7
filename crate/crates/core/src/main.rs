fn main() {
    std::process::exit(divrate::cli::main_with(std::env::args_os()));
}
