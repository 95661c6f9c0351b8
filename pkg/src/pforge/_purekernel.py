"""Pure-Python word kernels.

Letters are nonzero signed integers: generator ``k`` (1-based) is ``k`` and
its inverse is ``-k``.  Every function returns a freely reduced list.  The
compiled twin in ``_kernel.pyx`` implements the same contract; ``kernel.py``
picks whichever is importable.
"""

BACKEND = "pure"


def reduce_word(letters):
    out = []
    for x in letters:
        if out and out[-1] == -x:
            out.pop()
        else:
            out.append(x)
    return out


def concat(a, b):
    """Reduced concatenation of two already-reduced words."""
    out = list(a)
    for x in b:
        if out and out[-1] == -x:
            out.pop()
        else:
            out.append(x)
    return out


def invert_word(a):
    return [-x for x in reversed(a)]


def substitute(letters, images):
    """Apply a generator substitution and reduce.

    ``images[k-1]`` is the (reduced) image of generator ``k``; the image of
    ``-k`` is its reversed inverse.
    """
    out = []
    for x in letters:
        if x > 0:
            img = images[x - 1]
            for y in img:
                if out and out[-1] == -y:
                    out.pop()
                else:
                    out.append(y)
        else:
            img = images[-x - 1]
            for i in range(len(img) - 1, -1, -1):
                y = -img[i]
                if out and out[-1] == -y:
                    out.pop()
                else:
                    out.append(y)
    return out


def cyclic_bounds(letters):
    """Bounds (i, j) so letters[i:j] is the cyclically reduced core.

    The stripped prefix letters[:i] is the conjugator: w = u * core * u^-1.
    """
    i, j = 0, len(letters)
    while j - i >= 2 and letters[i] == -letters[j - 1]:
        i += 1
        j -= 1
    return i, j


def count_letters(letters, rank):
    counts = [0] * rank
    for x in letters:
        counts[abs(x) - 1] += 1
    return counts
