fn main() {
    std::process::exit(lwrefine::cli::main_entry());
}
