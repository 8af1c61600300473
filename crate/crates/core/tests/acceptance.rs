use perfhom::acceptance::{run_all, DEFAULT_SEED};

#[test]
fn acceptance_criteria() {
    let outcomes = run_all(DEFAULT_SEED);
    // The harness prints the test name without a newline.
    println!();
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
