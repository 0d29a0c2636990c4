package fixtures;

import java.util.HashMap;
import java.util.Map;

public class StaticInitializer {
    private static final Map<String, String> M = new HashMap<>();

    static {
        M.put("a", "b");
    }

    public static String get(String k) {
        return M.get(k);
    }
}
