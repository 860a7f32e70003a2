fn main() {
    std::process::exit(hettrans::cli::run(std::env::args_os()));
}
