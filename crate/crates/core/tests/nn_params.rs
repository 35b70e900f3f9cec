use twostage::nn::*;

#[test]
fn slices_are_contiguous_and_named() {
    let mut p = ParamStore::new();
    let a = p.push("a", 2, 3, &[1.0; 6]).unwrap();
    let b = p.push("b", 4, 1, &[2.0; 4]).unwrap();
    assert_eq!(a, 0..6);
    assert_eq!(b, 6..10);
    assert_eq!(p.len(), 10);
    assert_eq!(p.get("b").unwrap(), &[2.0; 4]);
    assert!(p.push("a", 1, 1, &[0.0]).is_err());
    assert!(p.push("c", 1, 1, &[f64::NAN]).is_err());
    assert!(p.push("c", 2, 2, &[0.0]).is_err());
}

#[test]
fn from_parts_roundtrip() {
    let mut p = ParamStore::new();
    p.push("w", 2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
    p.push("b", 2, 1, &[5.0, 6.0]).unwrap();
    let q = ParamStore::from_parts(p.values().to_vec(), p.slices().to_vec()).unwrap();
    assert_eq!(p, q);
    assert!(ParamStore::from_parts(vec![0.0; 7], p.slices().to_vec()).is_err());
}
