/// `DxHxW`, e.g. `16x64x64`.
pub fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let bad = || format!("`{s}` is not DxHxW with positive integers");
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
        if *o == 0 {
            return Err(bad());
        }
    }
    Ok(out)
}

/// `z,y,x` reals.
pub fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("`{s}` is not a comma-separated z,y,x triple"))?;
    v.try_into()
        .map_err(|_| format!("`{s}` needs exactly three components"))
}

pub fn parse_axis(s: &str) -> Result<usize, String> {
    match s {
        "z" | "0" => Ok(0),
        "y" | "1" => Ok(1),
        "x" | "2" => Ok(2),
        _ => Err(format!("axis `{s}` must be z, y or x")),
    }
}
