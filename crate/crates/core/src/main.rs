fn main() {
    std::process::exit(fusion_shap::cli::main_with_args(std::env::args_os()));
}
