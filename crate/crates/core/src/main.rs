fn main() {
    std::process::exit(mira::cli::run(std::env::args_os()));
}
