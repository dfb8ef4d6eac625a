fn main() {
    std::process::exit(gossiplab_cli::run_cli(std::env::args()));
}
