package fixtures;

public class NestedBlocks {
    public int classify(int n) {
        if (n > 0) {
            for (int i = 0; i < n; i++) {
                n -= 2;
            }
        } else {
            while (n < 0) {
                n += 3;
            }
        }
        return n;
    }
}
