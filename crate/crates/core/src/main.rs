fn main() {
    std::process::exit(matchmarket::cli::run(std::env::args_os()));
}
