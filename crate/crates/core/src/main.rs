fn main() {
    std::process::exit(syngen::cli::main());
}
