fn main() {
    std::process::exit(fedlab::cli::main());
}
