use widthlab_wasm::{exponent_table, ladder_table, slope, width_sweep};

#[test]
fn ipllr_table_lists_gamma_then_naive_exponents() {
    let t = exponent_table("ipllr", 3, 1).unwrap();
    let rows: Vec<Vec<&str>> = t.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0], ["1", "0", "-2", "-1"]);
    assert_eq!(rows[1], ["2", "1", "-5/2", "-2"]);
    assert_eq!(rows[3], ["4", "1", "-2", "-1"]);
}

#[test]
fn unknown_names_are_reported() {
    assert!(exponent_table("swish-p", 3, 1).is_err());
    assert!(width_sweep("ipllr", 3, "swish", 1.0, &[64], 1).is_err());
    assert!(width_sweep("ipllr", 3, "relu", 1.0, &[0], 1).is_err());
}

#[test]
fn sweep_separates_naive_from_llr() {
    let widths = [64, 256, 1024];
    let naive = width_sweep("naive-ip", 3, "relu", 10.0, &widths, 2).unwrap();
    let llr = width_sweep("ipllr", 3, "relu", 10.0, &widths, 2).unwrap();
    assert!(slope(&widths, &naive).unwrap() < -0.3);
    assert!(llr[2] > 100.0 * naive[2]);
}

#[test]
fn relu_ladder_is_stationary() {
    let t = ladder_table(3, "relu").unwrap();
    for line in t.lines().skip(1) {
        let cols: Vec<f64> = line.split('\t').skip(1).map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols[0], 2.0, "{line}");
        assert_eq!(cols[1], 1.0, "{line}");
    }
}
