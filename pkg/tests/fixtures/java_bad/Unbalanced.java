package fixtures;

public class Unbalanced {
    public int closed() {
        return 1;
    }

    public int dangling() {
        int x = 0;
