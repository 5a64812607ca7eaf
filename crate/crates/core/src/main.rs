fn main() {
    std::process::exit(stopaudit::report::cli::run(std::env::args_os()));
}
