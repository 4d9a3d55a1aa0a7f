fn main() {
    std::process::exit(innbound::cli::run());
}
