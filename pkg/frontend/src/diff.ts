/**
 * Anchor/proof listing alignment.
 *
 * Lines are aligned by mnemonic (the first token), not by byte equality:
 * two variants of the same loop body should pair up line for line even when
 * every operand differs. The raw line text is carried through untouched so
 * the renderer can display it byte for byte.
 */

export type RowKind = "match" | "changed" | "left-only" | "right-only";

export interface AlignedRow {
  left: string | null;
  right: string | null;
  kind: RowKind;
}

/** First token of a line, lowercased; "" for blank lines. */
export function mnemonic(line: string): string {
  const m = line.match(/^\s*(\S+)/);
  return m ? m[1].toLowerCase() : "";
}

function splitLines(text: string): string[] {
  return text === "" ? [] : text.split("\n");
}

/**
 * Align two listings on the longest common subsequence of their mnemonic
 * streams. Lines stranded between two alignment points are paired up
 * positionally as "changed"; leftovers become one-sided rows.
 */
export function alignListings(leftText: string, rightText: string): AlignedRow[] {
  const left = splitLines(leftText);
  const right = splitLines(rightText);
  const lm = left.map(mnemonic);
  const rm = right.map(mnemonic);

  // LCS length table over mnemonics
  const n = left.length;
  const m = right.length;
  const lcs: number[][] = Array.from({ length: n + 1 }, () => new Array(m + 1).fill(0));
  for (let i = n - 1; i >= 0; i -= 1) {
    for (let j = m - 1; j >= 0; j -= 1) {
      lcs[i][j] = lm[i] === rm[j]
        ? lcs[i + 1][j + 1] + 1
        : Math.max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }

  const out: AlignedRow[] = [];
  let pendL: string[] = [];
  let pendR: string[] = [];
  const flush = () => {
    // pair up the lines stranded in one gap, leftovers go one-sided
    const paired = Math.min(pendL.length, pendR.length);
    for (let k = 0; k < paired; k += 1) {
      out.push({ left: pendL[k], right: pendR[k], kind: "changed" });
    }
    for (let k = paired; k < pendL.length; k += 1) {
      out.push({ left: pendL[k], right: null, kind: "left-only" });
    }
    for (let k = paired; k < pendR.length; k += 1) {
      out.push({ left: null, right: pendR[k], kind: "right-only" });
    }
    pendL = [];
    pendR = [];
  };

  let i = 0;
  let j = 0;
  while (i < n && j < m) {
    if (lm[i] === rm[j]) {
      flush();
      out.push({ left: left[i], right: right[j], kind: "match" });
      i += 1;
      j += 1;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      pendL.push(left[i]);
      i += 1;
    } else {
      pendR.push(right[j]);
      j += 1;
    }
  }
  while (i < n) {
    pendL.push(left[i]);
    i += 1;
  }
  while (j < m) {
    pendR.push(right[j]);
    j += 1;
  }
  flush();
  return out;
}
