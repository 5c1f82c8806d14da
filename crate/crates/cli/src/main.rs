fn main() {
    std::process::exit(deadoil_cli::run(std::env::args()));
}
