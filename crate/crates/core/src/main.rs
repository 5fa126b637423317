fn main() {
    std::process::exit(neurogpt::cli::main());
}
