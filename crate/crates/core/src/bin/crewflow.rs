fn main() {
    std::process::exit(crewflow::cli::main());
}
