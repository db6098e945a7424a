fn main() {
    std::process::exit(genre_cli::main_with(std::env::args().collect()));
}
