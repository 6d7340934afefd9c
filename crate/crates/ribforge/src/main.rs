fn main() {
    std::process::exit(ribforge::cli::main());
}
