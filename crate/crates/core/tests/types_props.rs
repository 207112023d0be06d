use std::sync::Arc;

use craftkit::types::{deserialize_entry, serialize_entry, Element};
use craftkit::{Array, MultiArray, Packed, Scalar};
use num_complex::{Complex32, Complex64};
use parking_lot::Mutex;
use proptest::prelude::*;

/// Elements built from arbitrary bytes, so every bit pattern (NaN payloads,
/// signed zeros, subnormals) shows up.
fn elems<T: Element>(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<T>> {
    prop::collection::vec(prop::collection::vec(any::<u8>(), T::SIZE), n)
        .prop_map(|raw| raw.iter().map(|b| T::get(b)).collect())
}

fn bits_equal<T: Element>(a: &[T], b: &[T]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bit_eq(y))
}

macro_rules! element_round_trips {
    ($($m:ident: $t:ty),*) => {$(
        mod $m {
            use super::*;

            proptest! {
                #![proptest_config(ProptestConfig::with_cases(1000))]

                #[test]
                fn scalar(v in elems::<$t>(1..2)) {
                    let x = Scalar::new(v[0]);
                    let bytes = serialize_entry(&x);
                    let mut y = Scalar::new(<$t>::default());
                    deserialize_entry(&bytes, &mut y).unwrap();
                    prop_assert!(x.get().bit_eq(&y.get()));
                    prop_assert_eq!(serialize_entry(&y), bytes);
                }

                #[test]
                fn array(v in elems::<$t>(1..64)) {
                    let x = Array::new(v.clone());
                    let bytes = serialize_entry(&x);
                    let mut y = Array::<$t>::zeroed(v.len());
                    deserialize_entry(&bytes, &mut y).unwrap();
                    prop_assert!(bits_equal(&y, &v));
                    prop_assert_eq!(serialize_entry(&y), bytes);
                }

                #[test]
                fn multi_array(rows in 1usize..8, cols in 1usize..8, seed in elems::<$t>(64..65)) {
                    let data: Vec<$t> = seed[..rows * cols].to_vec();
                    let x = MultiArray::new(rows, cols, data.clone(), None);
                    let bytes = serialize_entry(&x);
                    let mut y = MultiArray::<$t>::zeroed(rows, cols, None);
                    deserialize_entry(&bytes, &mut y).unwrap();
                    prop_assert!(bits_equal(y.as_slice(), &data));
                    prop_assert_eq!(serialize_entry(&y), bytes);
                }

                #[test]
                fn multi_array_column_touches_only_that_column(
                    rows in 1usize..8,
                    cols in 1usize..8,
                    pick in any::<prop::sample::Index>(),
                    src in elems::<$t>(64..65),
                    sentinel in elems::<$t>(64..65),
                ) {
                    let c = pick.index(cols);
                    let x = MultiArray::new(rows, cols, src[..rows * cols].to_vec(), Some(c));
                    let bytes = serialize_entry(&x);
                    let before = sentinel[..rows * cols].to_vec();
                    let mut y = MultiArray::new(rows, cols, before.clone(), Some(c));
                    deserialize_entry(&bytes, &mut y).unwrap();
                    // oracle: element-wise expectation from the row-major layout
                    for r in 0..rows {
                        for k in 0..cols {
                            let want = if k == c { src[r * cols + k] } else { before[r * cols + k] };
                            prop_assert!(y[(r, k)].bit_eq(&want), "({r},{k})");
                        }
                    }
                }
            }
        }
    )*};
}

element_round_trips!(i32s: i32, i64s: i64, f32s: f32, f64s: f64, c64s: Complex32, c128s: Complex64);

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn packed(src in prop::collection::vec(any::<u8>(), 0..256)) {
        let out = Arc::new(Mutex::new(Vec::new()));
        let data = src.clone();
        let x = Packed::new(256, move || data.clone(), |_| Ok(()));
        let bytes = serialize_entry(&x);
        let sink = out.clone();
        let mut y = Packed::new(256, Vec::new, move |b| {
            *sink.lock() = b.to_vec();
            Ok(())
        });
        deserialize_entry(&bytes, &mut y).unwrap();
        prop_assert_eq!(&*out.lock(), &src);
        // pack after unpack gives the same record
        let again = out.lock().clone();
        let z = Packed::new(256, move || again.clone(), |_| Ok(()));
        prop_assert_eq!(serialize_entry(&z), bytes);
    }
}
