fn main() {
    std::process::exit(respan::cli::run(std::env::args_os()));
}
