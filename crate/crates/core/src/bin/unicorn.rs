fn main() {
    std::process::exit(unicorn::cli::main_with(std::env::args_os()));
}
