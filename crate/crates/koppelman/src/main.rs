fn main() {
    std::process::exit(koppelman::cli::run());
}
