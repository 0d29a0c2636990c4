package fixtures;

public interface InterfaceConstants {
    int MAX = 10;
    String NAME = "fixture";
}
