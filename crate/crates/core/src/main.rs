fn main() {
    std::process::exit(fedlmm::cli::main_entry());
}
