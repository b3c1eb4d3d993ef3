fn main() {
    std::process::exit(portham::cli::run(std::env::args().skip(1)));
}
