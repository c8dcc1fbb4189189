use uqkit_py::{batch, labeled, spread};

#[test]
fn labeled_rejects_length_mismatch() {
    assert!(labeled(&[0.1, 0.2], &[true]).is_err());
    assert_eq!(labeled(&[0.5], &[false]).unwrap(), vec![(0.5, false)]);
}

#[test]
fn batch_checks_row_width() {
    let t = batch(&[vec![1.0; 4], vec![2.0; 4]], &[1, 2, 2]).unwrap();
    assert_eq!(t.shape(), &[2, 1, 2, 2]);
    assert!(batch(&[vec![1.0; 3]], &[1, 2, 2]).is_err());
}

#[test]
fn identical_members_have_zero_spread() {
    let m = vec![vec![0.7, 0.3], vec![0.2, 0.8]];
    let (per, agg) = spread(&[m.clone(), m.clone(), m]).unwrap();
    assert_eq!(per.len(), 2);
    assert!(per.iter().all(|v| v.abs() < 1e-12));
    assert!(agg.abs() < 1e-12);
}
