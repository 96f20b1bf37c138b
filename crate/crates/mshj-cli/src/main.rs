fn main() {
    std::process::exit(mshj_cli::run());
}
