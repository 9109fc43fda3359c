fn main() {
    std::process::exit(coded_terasort_cli::main_impl());
}
