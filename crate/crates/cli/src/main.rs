fn main() {
    bimanual_cli::run()
}
