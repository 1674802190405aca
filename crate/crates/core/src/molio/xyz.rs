use super::{parse_coord, Element, MoleculeKind, ParseError, RawMolecule};
use std::fmt::Write;

/// Parses a single-frame XYZ file. Trailing blank lines are allowed.
pub fn parse_xyz(text: &str) -> Result<RawMolecule, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let (mol, next) = parse_frame(&lines, 0)?;
    if let Some(extra) = lines[next..].iter().position(|l| !l.trim().is_empty()) {
        return Err(ParseError::at(
            1,
            format!("count line declares {} atoms but line {} holds more content", mol.len(), next + extra + 1),
        ));
    }
    Ok(mol)
}

/// Parses a concatenation of XYZ frames, as written for trajectories.
pub fn parse_xyz_frames(text: &str) -> Result<Vec<RawMolecule>, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut at = 0;
    loop {
        while at < lines.len() && lines[at].trim().is_empty() {
            at += 1;
        }
        if at >= lines.len() {
            return Ok(frames);
        }
        let (mol, next) = parse_frame(&lines, at)?;
        frames.push(mol);
        at = next;
    }
}

fn parse_frame(lines: &[&str], start: usize) -> Result<(RawMolecule, usize), ParseError> {
    let count_line = start + 1;
    let header = lines.get(start).ok_or_else(|| ParseError::at(count_line, "missing count line"))?;
    let count: usize = header
        .trim()
        .parse()
        .map_err(|_| ParseError::at(count_line, format!("invalid atom count {:?}", header.trim())))?;
    let title = lines.get(start + 1).map(|s| s.trim_end().to_string()).unwrap_or_default();
    if count > 0 && start + 2 + count > lines.len() {
        return Err(ParseError::at(
            count_line,
            format!("count line declares {count} atoms but only {} atom lines follow", lines.len().saturating_sub(start + 2)),
        ));
    }
    let mut elements = Vec::with_capacity(count);
    let mut coords = Vec::with_capacity(count);
    for k in 0..count {
        let idx = start + 2 + k;
        let lineno = idx + 1;
        let fields: Vec<&str> = lines[idx].split_whitespace().collect();
        if fields.len() < 4 {
            return Err(ParseError::at(
                count_line,
                format!("count line declares {count} atoms but line {lineno} is not an atom line"),
            ));
        }
        let element = Element::from_symbol(fields[0])
            .ok_or_else(|| ParseError::at(lineno, format!("unknown element symbol {:?}", fields[0])))?;
        let x = parse_coord(fields[1], lineno, "x")?;
        let y = parse_coord(fields[2], lineno, "y")?;
        let z = parse_coord(fields[3], lineno, "z")?;
        elements.push(element);
        coords.push([x, y, z]);
    }
    let mol = RawMolecule { title, elements, coords, bonds: None, kind: MoleculeKind::SmallMolecule };
    Ok((mol, start + 2 + count))
}

/// Writes XYZ text with six decimals per coordinate; the title becomes the comment line.
pub fn write_xyz(mol: &RawMolecule) -> String {
    let mut out = String::new();
    let title = mol.title.replace('\n', " ");
    let _ = write!(out, "{}\n{}\n", mol.len(), title);
    for (e, c) in mol.elements.iter().zip(&mol.coords) {
        let _ = writeln!(out, "{} {:.6} {:.6} {:.6}", e.symbol(), c[0], c[1], c[2]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const WATER: &str = "3\nwater\nO 0.000000 0.000000 0.117300\nH 0.000000 0.757200 -0.469200\nH 0.000000 -0.757200 -0.469200\n";

    #[test]
    fn h2_minimal() {
        let m = parse_xyz("2\n\nH 0 0 0\nH 0 0 0.74\n").unwrap();
        assert_eq!(m.elements, vec![Element::H, Element::H]);
        assert_eq!(m.coords[1], [0.0, 0.0, 0.74]);
        assert!(m.bonds.is_none());
        assert_eq!(m.kind, MoleculeKind::SmallMolecule);
    }

    #[test]
    fn count_mismatch_cites_line_one() {
        let err = parse_xyz("3\n\nH 0 0 0\nH 0 0 0.74\n").unwrap_err();
        assert_eq!(err.line(), Some(1));
        let err = parse_xyz("1\n\nH 0 0 0\nH 0 0 0.74\n").unwrap_err();
        assert_eq!(err.line(), Some(1));
    }

    #[test]
    fn bad_symbol_and_coordinate() {
        assert_eq!(parse_xyz("1\n\nQq 0 0 0\n").unwrap_err().line(), Some(3));
        assert_eq!(parse_xyz("2\n\nH 0 0 0\nH 0 zz 0\n").unwrap_err().line(), Some(4));
        assert_eq!(parse_xyz("1\n\nH 0 0 nan\n").unwrap_err().line(), Some(3));
    }

    #[test]
    fn water_round_trip_is_bit_identical() {
        let m1 = parse_xyz(WATER).unwrap();
        let m2 = parse_xyz(&write_xyz(&m1)).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(write_xyz(&m2), WATER);
    }

    #[test]
    fn empty_and_single() {
        let empty = RawMolecule {
            title: String::new(),
            elements: vec![],
            coords: vec![],
            bonds: None,
            kind: MoleculeKind::SmallMolecule,
        };
        assert_eq!(write_xyz(&empty), "0\n\n");
        assert!(parse_xyz("0\n\n").unwrap().is_empty());
        let one = RawMolecule { elements: vec![Element::C], coords: vec![[1.0, 2.0, 3.0]], ..empty };
        assert_eq!(write_xyz(&one).lines().count(), 3);
    }

    #[test]
    fn frames() {
        let text = format!("{WATER}{WATER}");
        let frames = parse_xyz_frames(&text).unwrap();
        assert_eq!(frames.len(), 2);
        assert!(parse_xyz(&text).is_err());
    }
}
