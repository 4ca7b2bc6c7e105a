fn main() {
    fracext::cli::main_with_exit();
}
