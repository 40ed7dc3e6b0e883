//! Bit-exact `f64` text encoding as C99 hexadecimal floating literals
//! (`0x1.8p+1` is 3.0).

const FRAC_BITS: u32 = 52;
const FRAC_MASK: u64 = (1 << FRAC_BITS) - 1;

pub fn format(v: f64) -> String {
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> FRAC_BITS) & 0x7FF) as i64;
    let frac = bits & FRAC_MASK;
    if exp == 0x7FF {
        return if frac == 0 { format!("{sign}inf") } else { "nan".into() };
    }
    if exp == 0 && frac == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let digits = format!("{frac:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{e:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{e:+}")
    }
}

/// Parses a hexadecimal float literal. Values that cannot be represented
/// exactly are rejected rather than rounded.
pub fn parse(s: &str) -> Result<f64, String> {
    let err = |why: &str| format!("invalid hex float {s:?}: {why}");
    let (negative, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let rest = rest
        .strip_prefix("0x")
        .or_else(|| rest.strip_prefix("0X"))
        .ok_or_else(|| err("missing 0x prefix"))?;
    let (mantissa, exponent) = rest
        .split_once(['p', 'P'])
        .ok_or_else(|| err("missing binary exponent"))?;
    let exponent: i64 = exponent.parse().map_err(|_| err("bad exponent"))?;
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err("empty mantissa"));
    }
    let mut mant: u128 = 0;
    for c in int_part.chars().chain(frac_part.chars()) {
        let d = c.to_digit(16).ok_or_else(|| err("bad digit"))?;
        mant = mant
            .checked_mul(16)
            .and_then(|m| m.checked_add(u128::from(d)))
            .ok_or_else(|| err("too many digits"))?;
    }
    let signed = |v: f64| if negative { -v } else { v };
    if mant == 0 {
        return Ok(signed(0.0));
    }
    // value = mant * 2^e
    let mut e = exponent - 4 * frac_part.len() as i64;
    let top = 127 - mant.leading_zeros() as i64;
    // Normalize so the leading one sits at bit 52.
    if top > FRAC_BITS as i64 {
        let drop = (top - FRAC_BITS as i64) as u32;
        if mant & ((1u128 << drop) - 1) != 0 {
            return Err(err("more precision than f64 holds"));
        }
        mant >>= drop;
        e += i64::from(drop);
    } else {
        let lift = (FRAC_BITS as i64 - top) as u32;
        mant <<= lift;
        e -= i64::from(lift);
    }
    let unbiased = e + FRAC_BITS as i64;
    if unbiased > 1023 {
        return Err(err("out of range"));
    }
    let bits = if unbiased >= -1022 {
        (((unbiased + 1023) as u64) << FRAC_BITS) | (mant as u64 & FRAC_MASK)
    } else {
        let shift = (-1022 - unbiased) as u32;
        if shift > FRAC_BITS || mant & ((1u128 << shift) - 1) != 0 {
            return Err(err("more precision than f64 holds"));
        }
        (mant >> shift) as u64
    };
    Ok(signed(f64::from_bits(bits)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_values() {
        assert_eq!(format(1.0), "0x1p+0");
        assert_eq!(format(3.0), "0x1.8p+1");
        assert_eq!(format(-0.5), "-0x1p-1");
        assert_eq!(format(0.0), "0x0p+0");
        assert_eq!(format(-0.0), "-0x0p+0");
        assert_eq!(format(f64::MIN_POSITIVE), "0x1p-1022");
        assert_eq!(format(5e-324), "0x0.0000000000001p-1022");
        assert_eq!(parse("0x1.8p+1").unwrap(), 3.0);
        assert_eq!(parse("0x3p0").unwrap(), 3.0);
        assert_eq!(parse("0x.8p1").unwrap(), 1.0);
        assert_eq!(parse("0X1P-1").unwrap(), 0.5);
        assert!(parse("-0x0p+0").unwrap().is_sign_negative());
    }

    #[test]
    fn rejects_garbage_and_inexact() {
        for bad in ["", "1.5", "0x", "0xp1", "0x1.g p1", "0x1p", "0x1p+9999", "0x1.00000000000001p+0", "0x1p-1080"] {
            assert!(parse(bad).is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            prop_assert_eq!(parse(&format(v)).unwrap().to_bits(), bits);
        }
    }
}
