fn main() {
    std::process::exit(interfero::cli::run());
}
