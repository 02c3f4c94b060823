fn main() {
    println!("iia");
}
