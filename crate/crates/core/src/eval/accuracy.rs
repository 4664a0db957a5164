use crate::error::{Error, Result};

/// `1 - lev(a, b) / max(|a|, |b|)` over characters; 1 for two empty strings.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / longest as f64
}

/// Case-sensitive word accuracy in percent and mean normalized edit distance.
pub fn rendering_accuracy<P: AsRef<str>, T: AsRef<str>>(predicted: &[P], targets: &[T]) -> Result<(f64, f64)> {
    if predicted.len() != targets.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} targets",
            predicted.len(),
            targets.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Invalid("no texts to score".into()));
    }
    let n = predicted.len() as f64;
    let exact = predicted.iter().zip(targets).filter(|(p, t)| p.as_ref() == t.as_ref()).count();
    let mut neds: Vec<f64> = predicted
        .iter()
        .zip(targets)
        .map(|(p, t)| normalized_edit_distance(p.as_ref(), t.as_ref()))
        .collect();
    neds.sort_by(f64::total_cmp);
    Ok((100.0 * exact as f64 / n, neds.iter().sum::<f64>() / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(normalized_edit_distance("HELLO", "HELLO"), 1.0);
        assert!((normalized_edit_distance("HELLO", "HELLQ") - 0.8).abs() < 1e-12);
        assert_eq!(normalized_edit_distance("", "A"), 0.0);
        let (acc, ned) = rendering_accuracy(&["HELLO", "hello"], &["HELLO", "HELLO"]).unwrap();
        assert_eq!(acc, 50.0);
        assert!(ned < 1.0);
        assert!(rendering_accuracy::<&str, &str>(&[], &[]).is_err());
    }
}
