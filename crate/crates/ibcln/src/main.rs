fn main() {
    std::process::exit(ibcln::cli::run());
}
