fn main() {
    let results = adavid_core::selfcheck::run_all();
    for r in &results {
        println!("{} {} - {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    std::process::exit(if adavid_core::selfcheck::all_pass(&results) { 0 } else { 1 });
}
