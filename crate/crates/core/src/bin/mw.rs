fn main() {
    std::process::exit(mw_core::cli::main_with_env());
}
