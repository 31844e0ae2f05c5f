fn main() {
    std::process::exit(kg2text_core::cli::run());
}
