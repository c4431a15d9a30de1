fn main() {
    std::process::exit(hydro_rom::cli::run());
}
