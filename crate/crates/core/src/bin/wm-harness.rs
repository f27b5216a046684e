fn main() {
    std::process::exit(wm_harness::cli::main_with(std::env::args_os()));
}
