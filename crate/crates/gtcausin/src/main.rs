fn main() {
    std::process::exit(gtcausin::cli_main());
}
