use super::{parse_coord, Element, MoleculeKind, ParseError, RawMolecule};

/// Parses the first record of a V2000 molfile/SDF: counts line, atom block and bond block.
pub fn parse_sdf_subset(text: &str) -> Result<RawMolecule, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let counts_at = 3;
    let counts = lines
        .get(counts_at)
        .ok_or_else(|| ParseError::at(counts_at + 1, "missing counts line"))?;
    if counts.contains("V3000") {
        return Err(ParseError::Unsupported("V3000 connection tables are not supported; use V2000".into()));
    }
    let (n_atoms, n_bonds) = parse_counts(counts, counts_at + 1)?;
    let atoms_start = counts_at + 1;
    let bonds_start = atoms_start + n_atoms;
    if lines.len() < bonds_start + n_bonds {
        return Err(ParseError::at(
            counts_at + 1,
            format!("counts line declares {n_atoms} atoms and {n_bonds} bonds but the file ends early"),
        ));
    }

    let mut elements = Vec::with_capacity(n_atoms);
    let mut coords = Vec::with_capacity(n_atoms);
    for idx in atoms_start..bonds_start {
        let lineno = idx + 1;
        let fields: Vec<&str> = lines[idx].split_whitespace().collect();
        if fields.len() < 4 {
            return Err(ParseError::at(lineno, "atom line needs x, y, z and a symbol"));
        }
        let x = parse_coord(fields[0], lineno, "x")?;
        let y = parse_coord(fields[1], lineno, "y")?;
        let z = parse_coord(fields[2], lineno, "z")?;
        let element = Element::from_symbol(fields[3])
            .ok_or_else(|| ParseError::at(lineno, format!("unknown element symbol {:?}", fields[3])))?;
        elements.push(element);
        coords.push([x, y, z]);
    }

    let mut bonds = Vec::with_capacity(n_bonds);
    for idx in bonds_start..bonds_start + n_bonds {
        let lineno = idx + 1;
        let line = lines[idx];
        let a = fixed_int(line, 0, lineno, "first bond atom")?;
        let b = fixed_int(line, 3, lineno, "second bond atom")?;
        for v in [a, b] {
            if v < 1 || v as usize > n_atoms {
                return Err(ParseError::at(lineno, format!("bond references atom {v} of {n_atoms}")));
            }
        }
        if a == b {
            return Err(ParseError::at(lineno, format!("bond joins atom {a} to itself")));
        }
        bonds.push((a as usize - 1, b as usize - 1));
    }

    let title = lines.first().map(|s| s.trim_end().to_string()).unwrap_or_default();
    Ok(RawMolecule { title, elements, coords, bonds: Some(bonds), kind: MoleculeKind::SmallMolecule })
}

fn parse_counts(line: &str, lineno: usize) -> Result<(usize, usize), ParseError> {
    let fixed = || -> Option<(usize, usize)> {
        let a = line.get(0..3)?.trim().parse().ok()?;
        let b = line.get(3..6)?.trim().parse().ok()?;
        Some((a, b))
    };
    let loose = || -> Option<(usize, usize)> {
        let mut it = line.split_whitespace();
        Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?))
    };
    fixed()
        .or_else(loose)
        .ok_or_else(|| ParseError::at(lineno, format!("malformed counts line {:?}", line.trim_end())))
}

/// Three-column integer field; falls back to whitespace splitting for loosely formatted files.
fn fixed_int(line: &str, col: usize, lineno: usize, what: &str) -> Result<i64, ParseError> {
    if let Some(v) = line.get(col..col + 3).and_then(|s| s.trim().parse().ok()) {
        return Ok(v);
    }
    line.split_whitespace()
        .nth(col / 3)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ParseError::at(lineno, format!("malformed {what}")))
}
