fn main() {
    std::process::exit(darkmirror::cli::run());
}
