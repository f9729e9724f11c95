fn main() {
    std::process::exit(specstop::cli::parse_and_dispatch(std::env::args()));
}
